//! The closed object lexicon: categories, their affordances and appearance.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    Cabinet,
    Countertop,
    Table,
    Desk,
    Sink,
    CoffeeMachine,
    Pot,
    Potato,
    Apple,
    Tomato,
    Bread,
    Knife,
    Mug,
    SaltShaker,
    Sponge,
}

pub const NUM_CATEGORIES: usize = 15;

impl Category {
    pub const ALL: [Category; NUM_CATEGORIES] = [
        Category::Cabinet,
        Category::Countertop,
        Category::Table,
        Category::Desk,
        Category::Sink,
        Category::CoffeeMachine,
        Category::Pot,
        Category::Potato,
        Category::Apple,
        Category::Tomato,
        Category::Bread,
        Category::Knife,
        Category::Mug,
        Category::SaltShaker,
        Category::Sponge,
    ];

    pub const FURNITURE: [Category; 7] = [
        Category::Cabinet,
        Category::Countertop,
        Category::Table,
        Category::Desk,
        Category::Sink,
        Category::CoffeeMachine,
        Category::Pot,
    ];

    pub const ITEMS: [Category; 8] = [
        Category::Potato,
        Category::Apple,
        Category::Tomato,
        Category::Bread,
        Category::Knife,
        Category::Mug,
        Category::SaltShaker,
        Category::Sponge,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Category> {
        Category::ALL.get(i).copied()
    }

    /// CamelCase name, as used in oracle templates and action encodings.
    pub fn name(self) -> &'static str {
        match self {
            Category::Cabinet => "Cabinet",
            Category::Countertop => "Countertop",
            Category::Table => "Table",
            Category::Desk => "Desk",
            Category::Sink => "Sink",
            Category::CoffeeMachine => "CoffeeMachine",
            Category::Pot => "Pot",
            Category::Potato => "Potato",
            Category::Apple => "Apple",
            Category::Tomato => "Tomato",
            Category::Bread => "Bread",
            Category::Knife => "Knife",
            Category::Mug => "Mug",
            Category::SaltShaker => "SaltShaker",
            Category::Sponge => "Sponge",
        }
    }

    /// Single lowercase token used in sub-goal strings ("saltshaker").
    pub fn noun(self) -> &'static str {
        match self {
            Category::Cabinet => "cabinet",
            Category::Countertop => "countertop",
            Category::Table => "table",
            Category::Desk => "desk",
            Category::Sink => "sink",
            Category::CoffeeMachine => "coffeemachine",
            Category::Pot => "pot",
            Category::Potato => "potato",
            Category::Apple => "apple",
            Category::Tomato => "tomato",
            Category::Bread => "bread",
            Category::Knife => "knife",
            Category::Mug => "mug",
            Category::SaltShaker => "saltshaker",
            Category::Sponge => "sponge",
        }
    }

    /// Natural singular phrase used in instructions ("salt shaker").
    pub fn phrase(self) -> &'static str {
        match self {
            Category::SaltShaker => "salt shaker",
            Category::CoffeeMachine => "coffee machine",
            other => other.noun(),
        }
    }

    pub fn plural(self) -> &'static str {
        match self {
            Category::Cabinet => "cabinets",
            Category::Countertop => "countertops",
            Category::Table => "tables",
            Category::Desk => "desks",
            Category::Sink => "sinks",
            Category::CoffeeMachine => "coffee machines",
            Category::Pot => "pots",
            Category::Potato => "potatoes",
            Category::Apple => "apples",
            Category::Tomato => "tomatoes",
            Category::Bread => "breads",
            Category::Knife => "knives",
            Category::Mug => "mugs",
            Category::SaltShaker => "salt shakers",
            Category::Sponge => "sponges",
        }
    }

    /// Accepts the CamelCase name or the lowercase noun.
    pub fn parse(s: &str) -> Option<Category> {
        Category::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s || c.noun() == s)
    }

    pub fn is_furniture(self) -> bool {
        self.index() < Category::FURNITURE.len()
    }

    pub fn is_pickupable(self) -> bool {
        !self.is_furniture()
    }

    pub fn is_sliceable(self) -> bool {
        matches!(
            self,
            Category::Potato | Category::Apple | Category::Tomato | Category::Bread
        )
    }

    pub fn is_boilable(self) -> bool {
        self.is_sliceable()
    }

    pub fn is_openable(self) -> bool {
        self == Category::Cabinet
    }

    pub fn is_toggleable(self) -> bool {
        matches!(self, Category::Sink | Category::CoffeeMachine | Category::Pot)
    }

    /// Open surfaces where items can be found at world generation.
    pub fn is_surface(self) -> bool {
        matches!(self, Category::Countertop | Category::Table | Category::Desk)
    }

    /// Whether a receptacle of this category can hold `item`.
    pub fn accepts(self, item: Category) -> bool {
        if !item.is_pickupable() {
            return false;
        }
        match self {
            Category::Cabinet
            | Category::Countertop
            | Category::Table
            | Category::Desk
            | Category::Sink => true,
            Category::CoffeeMachine => item == Category::Mug,
            Category::Pot => item.is_boilable(),
            _ => false,
        }
    }

    pub fn capacity(self) -> usize {
        match self {
            Category::CoffeeMachine => 1,
            Category::Pot => 2,
            c if c.is_furniture() => 4,
            _ => 0,
        }
    }

    /// Preposition used when rendering "place X in/on Y".
    pub fn preposition(self) -> &'static str {
        if self.is_surface() {
            "on"
        } else {
            "in"
        }
    }

    /// Colours an instance of this category may take; the first is the default.
    pub fn palette(self) -> &'static [Color] {
        use Color::*;
        match self {
            Category::Cabinet => &[Brown, White],
            Category::Countertop => &[Gray, White],
            Category::Table => &[Brown, Black],
            Category::Desk => &[Brown, Black],
            Category::Sink => &[Silver, White],
            Category::CoffeeMachine => &[Black, Silver],
            Category::Pot => &[Silver, Black],
            Category::Potato => &[Brown],
            Category::Apple => &[Red, Green],
            Category::Tomato => &[Red],
            Category::Bread => &[Brown, Yellow],
            Category::Knife => &[Silver],
            Category::Mug => &[White, Blue, Red, Black],
            Category::SaltShaker => &[White, Silver],
            Category::Sponge => &[Yellow, Green],
        }
    }

    pub fn material(self) -> Material {
        match self {
            Category::Cabinet | Category::Table | Category::Desk => Material::Wood,
            Category::Countertop => Material::Stone,
            Category::Sink | Category::Pot | Category::Knife => Material::Metal,
            Category::CoffeeMachine | Category::Sponge => Material::Plastic,
            Category::Potato | Category::Apple | Category::Tomato | Category::Bread => {
                Material::Organic
            }
            Category::Mug => Material::Ceramic,
            Category::SaltShaker => Material::Glass,
        }
    }
}

impl core::fmt::Display for Category {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Color {
    Brown,
    Red,
    Yellow,
    White,
    Green,
    Silver,
    Black,
    Blue,
    Gray,
}

impl Color {
    pub const ALL: [Color; 9] = [
        Color::Brown,
        Color::Red,
        Color::Yellow,
        Color::White,
        Color::Green,
        Color::Silver,
        Color::Black,
        Color::Blue,
        Color::Gray,
    ];

    pub fn word(self) -> &'static str {
        match self {
            Color::Brown => "brown",
            Color::Red => "red",
            Color::Yellow => "yellow",
            Color::White => "white",
            Color::Green => "green",
            Color::Silver => "silver",
            Color::Black => "black",
            Color::Blue => "blue",
            Color::Gray => "gray",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Material {
    Organic,
    Metal,
    Ceramic,
    Wood,
    Glass,
    Plastic,
    Stone,
}

impl Material {
    pub const ALL: [Material; 7] = [
        Material::Organic,
        Material::Metal,
        Material::Ceramic,
        Material::Wood,
        Material::Glass,
        Material::Plastic,
        Material::Stone,
    ];

    pub fn word(self) -> &'static str {
        match self {
            Material::Organic => "organic",
            Material::Metal => "metal",
            Material::Ceramic => "ceramic",
            Material::Wood => "wood",
            Material::Glass => "glass",
            Material::Plastic => "plastic",
            Material::Stone => "stone",
        }
    }
}
