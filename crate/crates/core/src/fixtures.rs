//! Bundled data sets.

use crate::model::BinaryPanel;

pub const CARCINOGENICITY_NODES: [&str; 4] = ["SAL", "MLA", "ABS", "SCE"];

/// Pattern counts of the carcinogenicity panel, indexed by the binary
/// counter with SAL as the least significant bit (SAL, MLA, ABS, SCE).
pub const CARCINOGENICITY_COUNTS: [usize; 16] = [18, 0, 6, 1, 1, 0, 0, 2, 3, 1, 17, 5, 3, 0, 13, 25];

/// Where the carcinogenicity panel comes from.
pub const CARCINOGENICITY_NOTE: &str = "Results of four short-term genotoxicity assays \
(Salmonella, mouse lymphoma, chromosome aberration, sister chromatid exchange) on 95 \
chemicals, as tabulated by Lipsitz (1994). The pattern counts were keyed in by hand \
and verified by reproducing the published QEBD estimates, robust standard errors and \
QIC values.";

/// The 95 × 4 carcinogenicity panel with named nodes.
pub fn carcinogenicity() -> BinaryPanel {
    BinaryPanel::from_pattern_counts(4, &CARCINOGENICITY_COUNTS)
        .and_then(|p| p.with_node_names(CARCINOGENICITY_NODES.iter().map(|s| s.to_string()).collect()))
        .expect("fixture is well formed")
}
