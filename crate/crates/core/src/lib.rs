pub mod audio;
pub mod bench;
pub mod capture;
pub mod fsutil;
pub mod language;
pub mod providers;
pub mod questionnaire;
pub mod session;
pub mod store;
