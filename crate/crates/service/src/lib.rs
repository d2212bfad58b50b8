//! Hosts the trial loop over a WebSocket so a live participant can take the
//! place of the synthetic human.
//!
//! Each connection to `/session` is one session: `Hello`, `Ready`, then a
//! stream of `Cursor` frames while the server runs eight trials at 100 Hz and
//! reports `Tick`, `TrialEnd` and finally `SessionEnd`. Logs are written to
//! the data directory before `SessionEnd` is sent.

pub mod server;
pub mod session;
pub mod wire;

pub use server::{bind, env_settings, serve, ServerConfig};
pub use session::{Phase, SessionCore};
pub use wire::{ClientMessage, ErrorCode, ServerMessage};
