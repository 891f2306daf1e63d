pub mod density;
pub mod fit;
pub mod gk;
pub mod sample;
pub mod toy_kl;
pub mod varsel;
