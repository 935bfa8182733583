use anyhow::Result;
use clap::Parser;
use cmrfusion_cli::cli::{load_config, run_stage, Args, Command};
use cmrfusion_cli::server;
use cmrfusion_core::pipeline::Pipeline;

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    if args.command == Command::Serve {
        let pipeline = Pipeline::new(load_config(&args)?)?;
        let rt = tokio::runtime::Runtime::new()?;
        return rt.block_on(server::serve(pipeline, args.port));
    }
    for path in run_stage(&args)? {
        println!("{}", path.display());
    }
    Ok(())
}
