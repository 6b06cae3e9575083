//! TCP newline-JSON endpoint for one searcher.

use std::net::TcpListener;
use std::sync::Arc;

use super::Searcher;
use crate::error::{Error, Result};
use crate::wire::{serve_forever, Request, Response};

pub fn handle(searcher: &Searcher, req: Request) -> Response {
    let result = match req {
        Request::Search(r) => searcher.search(&r).map(Response::Hits),
        Request::Update(u) => searcher.update(&u).map(|shard_id| Response::Updated {
            count: u.members.len(),
            shards: vec![shard_id],
        }),
        Request::UserSearch(_) => Err(Error::input("searchers only accept search and update requests")),
    };
    result.unwrap_or_else(|e| Response::error(&e))
}

/// Serve until the listener fails; one thread per connection.
pub fn serve(listener: TcpListener, searcher: Arc<Searcher>) -> Result<()> {
    serve_forever(listener, Arc::new(move |req| handle(&searcher, req)))
}
