#![allow(dead_code)]

pub mod files;
pub mod grad;
pub mod stats;
pub mod synth;
