//! Operator CLI and HTTP service for concord campaigns.

pub mod args;
pub mod commands;
pub mod config;
pub mod server;

use args::{Cli, Command};
use commands::Ctx;
use config::{Config, DEFAULT_ADDR};

/// Runs one parsed invocation and returns its stdout text.
pub fn run(cli: Cli) -> anyhow::Result<String> {
    let ctx = Ctx::new(cli.store, Config::load(cli.config.as_deref())?);
    match &cli.command {
        Command::Init(a) => commands::init(&ctx, a),
        Command::Import(a) => commands::import(&ctx, a),
        Command::Sample(a) => commands::sample(a),
        Command::Plan(a) => commands::plan(a),
        Command::Assign(a) => commands::assign(&ctx, a),
        Command::Serve(a) => {
            let store = concord_core::store::Store::open_default(&ctx.store)?;
            let addr = a.addr.clone().or(ctx.addr.clone()).unwrap_or_else(|| DEFAULT_ADDR.to_owned());
            tokio::runtime::Runtime::new()?.block_on(server::serve(store, &addr, a.admin_token.clone()))?;
            Ok(String::new())
        }
        Command::Submit(a) => commands::submit(&ctx, a),
        Command::CloseRound(a) => commands::close_round(&ctx, a),
        Command::Agreement(a) => commands::agreement(&ctx, a),
        Command::Aggregate(a) => commands::aggregate(&ctx, a),
        Command::Holdout(a) => commands::holdout(&ctx, a),
        Command::Split(a) => commands::split(&ctx, a),
        Command::Export(a) => commands::export(&ctx, a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Compare(a) => commands::compare(a),
        Command::SelectEpoch(a) => commands::select_epoch_cmd(a),
    }
}
