//! Session server for overlapchat: live sessions, the HTTP and WebSocket
//! surface, and the configuration they share with the command line.

pub mod cli;
pub mod config;
pub mod hub;
pub mod live;
pub mod server;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/gateway.md")]
mod book_gateway {}
