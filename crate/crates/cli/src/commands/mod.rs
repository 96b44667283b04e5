pub mod embed;
pub mod eval;
pub mod gen;
pub mod gradcheck;
pub mod palette;
pub mod recolor;
pub mod spectra;
