//! The closed set of 24 localizable privacy attributes and their categories.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

/// Which modality carries the information for an attribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Category {
    Textual,
    Visual,
    Multimodal,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Textual, Category::Visual, Category::Multimodal];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Textual => "TEXTUAL",
            Category::Visual => "VISUAL",
            Category::Multimodal => "MULTIMODAL",
        }
    }

    pub fn members(self) -> impl Iterator<Item = Attribute> {
        Attribute::ALL.into_iter().filter(move |a| a.category() == self)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

macro_rules! attributes {
    ($( $variant:ident => ($key:literal, $category:ident, $display:literal) ),+ $(,)?) => {
        /// A privacy attribute. Variant order is taxonomy order (category, then
        /// column order of the results table); `Ord` follows it.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum Attribute {
            $( $variant ),+
        }

        impl Attribute {
            pub const ALL: [Attribute; 24] = [ $( Attribute::$variant ),+ ];

            pub fn key(self) -> &'static str {
                match self {
                    $( Attribute::$variant => $key ),+
                }
            }

            pub fn category(self) -> Category {
                match self {
                    $( Attribute::$variant => Category::$category ),+
                }
            }

            pub fn display_name(self) -> &'static str {
                match self {
                    $( Attribute::$variant => $display ),+
                }
            }

            pub fn from_key(key: &str) -> Result<Attribute, Error> {
                match key {
                    $( $key => Ok(Attribute::$variant), )+
                    other => Err(Error::UnknownAttribute(other.to_string())),
                }
            }
        }
    };
}

attributes! {
    Location => ("location", Textual, "Location"),
    HomeAddr => ("home_addr", Textual, "Home address"),
    Name => ("name", Textual, "Name"),
    BirthDt => ("birth_dt", Textual, "Date of birth"),
    PhoneNo => ("phone_no", Textual, "Phone number"),
    Landmark => ("landmark", Textual, "Landmark"),
    Datetime => ("datetime", Textual, "Date/time"),
    EmailAdd => ("emailadd", Textual, "Email address"),
    Face => ("face", Visual, "Face"),
    LicPlate => ("lic_plate", Visual, "License plate"),
    Person => ("person", Visual, "Person"),
    Nudity => ("nudity", Visual, "Nudity"),
    Handwrit => ("handwrit", Visual, "Handwriting"),
    PhyDisb => ("phy_disb", Visual, "Physical disability"),
    MedHist => ("med_hist", Visual, "Medical history"),
    Fingerpr => ("fingerpr", Visual, "Fingerprint"),
    Signtr => ("signtr", Visual, "Signature"),
    CrCard => ("cr_card", Multimodal, "Credit card"),
    Passport => ("passport", Multimodal, "Passport"),
    DrivLic => ("driv_lic", Multimodal, "Driver's license"),
    StudId => ("stud_id", Multimodal, "Student ID"),
    Mail => ("mail", Multimodal, "Mail"),
    Receipt => ("receipt", Multimodal, "Receipt"),
    Ticket => ("ticket", Multimodal, "Ticket"),
}

impl Attribute {
    pub fn is_textual(self) -> bool {
        self.category() == Category::Textual
    }

    /// Whether annotations of this attribute are 4-sided polygons or boxes.
    pub fn uses_quadrilaterals(self) -> bool {
        self.is_textual() || matches!(self, Attribute::Signtr | Attribute::Handwrit)
    }

    /// Position in taxonomy order, used for stable color and column assignment.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn textual() -> impl Iterator<Item = Attribute> {
        Category::Textual.members()
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Attribute {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Attribute::from_key(s)
    }
}

impl Serialize for Attribute {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.key())
    }
}

impl<'de> Deserialize<'de> for Attribute {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let key = String::deserialize(deserializer)?;
        Attribute::from_key(&key).map_err(serde::de::Error::custom)
    }
}

/// Checks the 8 + 9 + 7 category partition. Called once when a dataset is loaded.
pub fn assert_partition() {
    let counts = Category::ALL.map(|c| c.members().count());
    assert_eq!(counts, [8, 9, 7], "taxonomy category partition");
    assert_eq!(counts.iter().sum::<usize>(), Attribute::ALL.len());
}
