use std::process::ExitCode;

use cephalo_cli::{DispatchError, Registry};

fn main() -> ExitCode {
    match Registry::standard().dispatch(std::env::args_os()) {
        Ok(text) => {
            println!("{text}");
            ExitCode::SUCCESS
        }
        Err(DispatchError::Clap(e)) => {
            let _ = e.print();
            ExitCode::from(e.exit_code() as u8)
        }
        Err(DispatchError::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
