use std::io::{self, Write};
use std::process::ExitCode;

use clap::Parser;
use tripdp_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mut out, mut err) = (io::stdout().lock(), io::stderr().lock());
    let status = match run(cli, &mut out, &mut err) {
        Ok(s) => s,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.status
        }
    };
    let _ = out.flush();
    ExitCode::from(status.code() as u8)
}
