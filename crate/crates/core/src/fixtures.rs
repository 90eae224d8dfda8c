//! Small reference groups used by tests, the CLI and the simulator.

use crate::types::Group;

/// Token sequences for the six-trajectory toy group: `{g0,g1}` share three
/// tokens, `{g2,g3,g4}` share four, `{g3,g4}` share two more, and `g5`
/// shares nothing.
pub fn example_tokens() -> Vec<Vec<u32>> {
    vec![
        vec![5, 5, 5, 1, 1, 1],
        vec![5, 5, 5, 2, 2],
        vec![7, 7, 7, 7, 3, 3],
        vec![7, 7, 7, 7, 4, 4, 8],
        vec![7, 7, 7, 7, 4, 4, 9, 9],
        vec![6, 6],
    ]
}

/// Rewards under which the highest-reward trajectory `g2` sits inside a
/// process set with negative step advantage.
pub const EXAMPLE_REWARDS: [f64; 6] = [0.5, 0.5, 1.0, 0.0, 0.0, 0.5];

pub fn example_group() -> Group {
    Group::from_tokens("example", example_tokens(), &EXAMPLE_REWARDS)
        .expect("reference group is valid")
}
