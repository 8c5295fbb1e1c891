//! mosaic is an analog-circuit verification engine and design-agent
//! harness. It parses SPICE-subset netlists, simulates them with a
//! built-in level-1 MOSFET solver, runs a staged functional verification
//! flow with per-circuit-type criteria, archives verified designs as
//! reusable subcircuit tools, drives an iterative design loop against a
//! pluggable text generator, and scores the results with Pass@k and
//! Wilson confidence intervals.
//!
//! The guide under `book/` walks through each layer; its code snippets
//! compile and run as doc-tests of this crate.
//!
//! ```
//! use mosaic::netlist::parse_netlist;
//! use mosaic::sim::solve_op;
//!
//! let circuit = parse_netlist("V1 in 0 5\nR1 in mid 1k\nR2 mid 0 1k\n").unwrap();
//! let op = solve_op(&circuit).unwrap();
//! assert!((op.node_voltages["mid"] - 2.5).abs() < 1e-9);
//! ```

pub mod agent;
pub mod bench;
pub mod checks;
pub mod cli;
pub mod library;
pub mod netlist;
pub mod report;
pub mod sim;
pub mod tasks;

// The guide's chapters are included as doc-comments on empty modules so
// `cargo test --doc` executes every code block in the book.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/netlists.md")]
    mod netlists {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
    #[doc = include_str!("../../../book/src/tool-library.md")]
    mod tool_library {}
    #[doc = include_str!("../../../book/src/agent-loop.md")]
    mod agent_loop {}
    #[doc = include_str!("../../../book/src/benchmarking.md")]
    mod benchmarking {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
