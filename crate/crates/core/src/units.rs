//! Atomic units: ħ = 1, energies in Hartree, lengths in bohr, masses in mₑ.

/// Boltzmann constant in Hartree per kelvin.
pub const BOLTZMANN_HARTREE_PER_KELVIN: f64 = 3.1668115634e-6;

/// Inverse temperature β = 1/(k_B T) in 1/Hartree.
pub fn beta_from_kelvin(temperature: f64) -> f64 {
    1.0 / (BOLTZMANN_HARTREE_PER_KELVIN * temperature)
}

pub fn kelvin_from_beta(beta: f64) -> f64 {
    1.0 / (BOLTZMANN_HARTREE_PER_KELVIN * beta)
}
