#![allow(dead_code)]

pub mod fd;
pub mod gradsuite;
pub mod oracles;
pub mod geomsuite;
