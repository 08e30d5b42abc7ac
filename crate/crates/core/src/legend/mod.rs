//! Locating the table of legends and parsing it into templates.

pub mod locator;
pub mod parser;
