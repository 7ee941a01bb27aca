use std::time::Duration;

use fungisync::service::Outbound;
use futures_util::{SinkExt, StreamExt};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

pub struct Client {
    socket: WebSocketStream<MaybeTlsStream<TcpStream>>,
}

impl Client {
    pub async fn connect(addr: std::net::SocketAddr) -> Self {
        let (socket, _) = connect_async(format!("ws://{addr}/ws")).await.expect("connect");
        Self { socket }
    }

    pub async fn send_raw(&mut self, text: &str) {
        self.socket.send(Message::text(text)).await.expect("send");
    }

    /// Sends `{"type":"cmd", ...op}` where `op` is the command's JSON fields.
    pub async fn cmd(&mut self, op: serde_json::Value) {
        let mut v = op;
        v["type"] = "cmd".into();
        self.send_raw(&v.to_string()).await;
    }

    /// Next outbound message, or `None` after `wait` of silence.
    pub async fn next(&mut self, wait: Duration) -> Option<Outbound> {
        loop {
            let msg = tokio::time::timeout(wait, self.socket.next()).await.ok()??.ok()?;
            if let Message::Text(t) = msg {
                return Some(serde_json::from_str(t.as_str()).expect("outbound parses"));
            }
        }
    }

    /// Skips broadcasts until an error reply arrives.
    pub async fn next_err(&mut self, wait: Duration) -> Option<fungisync::service::ErrorReply> {
        let deadline = tokio::time::Instant::now() + wait;
        loop {
            let left = deadline.saturating_duration_since(tokio::time::Instant::now());
            match self.next(left).await? {
                Outbound::Err(e) => return Some(e),
                Outbound::State(_) => continue,
            }
        }
    }

    /// Waits for a broadcast satisfying `pred`.
    pub async fn state_where(
        &mut self,
        wait: Duration,
        mut pred: impl FnMut(&fungisync::service::StateBroadcast) -> bool,
    ) -> Option<fungisync::service::StateBroadcast> {
        let deadline = tokio::time::Instant::now() + wait;
        loop {
            let left = deadline.saturating_duration_since(tokio::time::Instant::now());
            if let Outbound::State(s) = self.next(left).await? {
                if pred(&s) {
                    return Some(s);
                }
            }
        }
    }
}
