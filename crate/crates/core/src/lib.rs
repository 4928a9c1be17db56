pub mod autodiff;
pub mod backtest;
pub mod diff_losses;
pub mod commands;
pub mod garch;
pub mod io;
pub mod models;
pub mod series;
pub mod stats;
pub mod stylized_facts;
pub mod trainer;
