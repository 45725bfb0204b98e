//! Closed-loop simulation and the Monte-Carlo harness.

pub mod episode;
pub mod montecarlo;
pub mod obstacle;
pub mod output;
pub mod reference;
pub mod scenario;

pub use episode::{collect_subproblems, measure, obstacle_track, run_episode, run_with_track, EpisodeResult, ObstacleTrack, TrajectoryRow};
pub use montecarlo::{monte_carlo, MetricsRow, MonteCarloReport};
pub use obstacle::{step_obstacle, DiscParams, ObstacleKind, ObstacleModel};
pub use reference::FigureEight;
pub use scenario::{sample_encounter, Encounter, Scenario};
