pub mod baselines;
pub mod benchgen;
pub mod ego;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod neural;
pub mod perm;
pub mod sim;
pub mod tournament;

pub use baselines::Aggregator;
pub use error::{Error, Result};
pub use perm::{kendall_tau, Permutation, Voter, VoterProfile};
pub use tournament::{tournament_greedy, tournament_greedy_decayed, TournamentGraph};
pub use benchgen::{BenchmarkConfig, WeightMode};
pub use ego::{Dataset, EgoConfig, Sample};
pub use neural::Mlp;
pub use sim::{Policy, SimConfig, SimEnvironment};
