#![allow(dead_code)]

pub mod audit;
pub mod oracle;
