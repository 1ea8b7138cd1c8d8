pub mod auth;
pub mod chat;
pub mod gateway;
pub mod geo;
pub mod notify;
pub mod sos;
pub mod time;
pub mod treestore;
