//! Command-line entry point. Exit codes: 0 success, 1 runtime failure,
//! 2 usage or parse error.

use mcfair::cli;
use mcfair::error::Error;
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const USAGE: &str = "\
usage: mcfair <command> [options]

commands:
  synth        --rows N --races N --seed N --out data.csv --out-schema data.schema
  audit        --data F --schema F --preds F --groups F [--d 10] --out report.txt
  postprocess  --data F --schema F --preds F --groups F --kind mc|ma
               [--alpha 0.01] [--d 10] [--seed 0] --out-preds F --out-circuit F
  apply        --preds F --data F --schema F --circuit F --out F
  run          --config F

MCFAIR_WORKERS sets the worker-thread count for `run`.
";

struct Args {
    flags: HashMap<String, String>,
}

impl Args {
    fn parse(argv: &[String]) -> Result<Self, Error> {
        let mut flags = HashMap::new();
        let mut it = argv.iter();
        while let Some(arg) = it.next() {
            let key = arg
                .strip_prefix("--")
                .ok_or_else(|| Error::Usage(format!("expected --flag, found `{arg}`")))?;
            let value = it
                .next()
                .ok_or_else(|| Error::Usage(format!("flag --{key} needs a value")))?;
            flags.insert(key.to_string(), value.clone());
        }
        Ok(Args { flags })
    }

    fn path(&self, key: &str) -> Result<PathBuf, Error> {
        self.flags
            .get(key)
            .map(PathBuf::from)
            .ok_or_else(|| Error::Usage(format!("missing --{key}")))
    }

    fn str_req(&self, key: &str) -> Result<&str, Error> {
        self.flags
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Usage(format!("missing --{key}")))
    }

    fn num<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, Error> {
        match self.flags.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse::<T>()
                .map_err(|_| Error::Usage(format!("bad value for --{key}: `{v}`"))),
        }
    }

    fn num_req<T: std::str::FromStr>(&self, key: &str) -> Result<T, Error> {
        let v = self.str_req(key)?;
        v.parse::<T>()
            .map_err(|_| Error::Usage(format!("bad value for --{key}: `{v}`")))
    }
}

fn dispatch(command: &str, args: &Args) -> Result<(), Error> {
    match command {
        "synth" => cli::cmd_synth(
            args.num_req("rows")?,
            args.num_req("races")?,
            args.num("seed", 0u64)?,
            &args.path("out")?,
            &args.path("out-schema")?,
        ),
        "audit" => cli::cmd_audit(
            &args.path("data")?,
            &args.path("schema")?,
            &args.path("preds")?,
            &args.path("groups")?,
            args.num("d", 10usize)?,
            &args.path("out")?,
        ),
        "postprocess" => cli::cmd_postprocess(
            &args.path("data")?,
            &args.path("schema")?,
            &args.path("preds")?,
            &args.path("groups")?,
            args.str_req("kind")?,
            args.num("alpha", 0.01f64)?,
            args.num("d", 10usize)?,
            args.num("seed", 0u64)?,
            &args.path("out-preds")?,
            &args.path("out-circuit")?,
        ),
        "apply" => cli::cmd_apply(
            &args.path("preds")?,
            &args.path("data")?,
            &args.path("schema")?,
            &args.path("circuit")?,
            &args.path("out")?,
        ),
        "run" => cli::cmd_run(Path::new(args.str_req("config")?)),
        other => Err(Error::Usage(format!("unknown command `{other}`"))),
    }
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Usage(_)
        | Error::Parse { .. }
        | Error::Io { .. }
        | Error::Schema(_)
        | Error::HeaderMismatch { .. }
        | Error::UnknownColumn(_)
        | Error::CellDomain { .. }
        | Error::Outcome { .. } => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let Some(command) = argv.first() else {
        eprint!("{USAGE}");
        return ExitCode::from(2);
    };
    let result = Args::parse(&argv[1..]).and_then(|args| dispatch(command, &args));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mcfair {command}: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
