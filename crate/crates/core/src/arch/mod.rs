//! Architecture search: spaces, decoded networks, the recurrent controller
//! and the three strategies.

pub mod controller;
pub mod network;
pub mod space;
pub mod strategy;

pub use controller::{reward, Controller, ControllerConfig, REWARD_EPS};
pub use network::{ArchNet, Selection, Supernet};
pub use space::{norm_groups, ArchGenome, OpKind, Position, Role, SearchSpace, Slot, SpaceKind};
pub use strategy::{
    darts_search, enas_child_step, enas_search, multi_trial_search, ArchSearchResult, ArchTrial, ArchTrialRunner,
    DartsConfig, DartsResult, EnasConfig, EnasResult, MultiTrialConfig, OneShotTask, Strategy,
};
