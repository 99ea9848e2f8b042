//! Cooperative day-ahead dispatch between a gas distribution network that
//! blends hydrogen into its methane supply and an active distribution
//! network that owns fuel cells, electrolyzer connections, batteries and
//! renewable generation.
//!
//! The two operators are independent. They trade electricity for
//! electrolysis and blended gas for fuel cells, and settle quantities and
//! prices through a two-stage Nash bargain run by consensus ADMM, so neither
//! side reveals its network model. A two-stage robust extension protects
//! the electricity side against load and renewable forecast errors.
//!
//! ```
//! use hcng_bargain::{bargain, netmodel};
//!
//! let s = netmodel::bundled("tiny4x3").unwrap();
//! let o = bargain::cooperate(&s).unwrap();
//! // Both sides are at least as well off as on their own.
//! assert!(o.delta_e >= -1e-6 && o.delta_g >= -1e-6);
//! ```
//!
//! Module map: [`netmodel`] holds scenario data, [`conic`] the solver
//! interface, [`gdn`] and [`adn`] the two entity models, [`bargain`] the
//! negotiation, [`robust`] the worst-case extension, [`oracle`] the
//! independent checks and [`cli`] plus [`report`] the command-line pipeline.

// Model builders index several per-period arrays with one counter; iterator
// rewrites of those loops read worse.
#![allow(clippy::needless_range_loop)]

pub mod adn;
pub mod bargain;
pub mod cli;
pub mod conic;
pub mod error;
pub mod gdn;
pub mod netmodel;
pub mod oracle;
pub mod report;
pub mod robust;

pub use error::{Error, Result};

/// Code blocks of the guide, compiled and run as doc-tests so the book
/// cannot drift from the library.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/quickstart.md")]
    mod quickstart {}
    #[doc = include_str!("../../../book/src/scenarios.md")]
    mod scenarios {}
    #[doc = include_str!("../../../book/src/networks.md")]
    mod networks {}
    #[doc = include_str!("../../../book/src/bargaining.md")]
    mod bargaining {}
    #[doc = include_str!("../../../book/src/robust.md")]
    mod robust {}
    #[doc = include_str!("../../../book/src/oracles.md")]
    mod oracles {}
}
