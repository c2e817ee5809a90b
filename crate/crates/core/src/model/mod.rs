//! Quantum-state side of the model: Raman branching, the mixing angle and the
//! two-qubit polarization state.

mod branching;
mod state;

pub use branching::{cg_branching_weights, clebsch_gordan, effective_eta, BranchingEntry, BranchingTable, MixingAngle};
pub use state::{
    apply_dephasing, born_coincidence_probs, chsh_from_state, chsh_max_canonical, concurrence, field1_vector,
    field2_port_probability, field2_vector, ideal_state, AnalyzerSettings, ChshSettings, CoincidenceProbs, Port,
    TwoQubitState, EIGEN_FLOOR, HERMITICITY_TOL, TRACE_TOL,
};

/// Cs D2 write/read scheme: F=4 → F'=4 → F=3.
pub const CS_FG: i32 = 4;
pub const CS_FE: i32 = 4;
pub const CS_FS: i32 = 3;

/// Branching table and mixing angle for the Cs scheme.
pub fn cesium_eta() -> MixingAngle {
    let table = cg_branching_weights(CS_FG, CS_FE, CS_FS).expect("Cs levels are dipole allowed");
    effective_eta(&table).expect("Cs table is non-empty")
}
