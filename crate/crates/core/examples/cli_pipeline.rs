//! The command-line workflow driven from code: gen, train, eval and
//! alpha-report into a temporary directory.

use clap::Parser;

use civae::cli::{run, Cli};

fn main() -> civae::Result<()> {
    let dir = std::env::temp_dir().join("civae-cli-pipeline");
    let d = |p: &str| dir.join(p).display().to_string();
    let steps: [Vec<String>; 4] = [
        vec!["gen", "--scheme", "sine", "--n", "600", "--seed", "1", "--out", &d("data")],
        vec!["train", "--data", &d("data"), "--out", &d("run"), "--seed", "1", "--epochs", "5", "--restarts", "1"],
        vec!["eval", "--checkpoint", &d("run/checkpoint.json"), "--data", &d("data"), "--out", &d("eval"), "--loglik-draws", "64"],
        vec!["alpha-report", "--checkpoint", &d("run/checkpoint.json"), "--data", &d("data"), "--out", &d("alpha"), "--k-eval", "16"],
    ]
    .map(|v| v.into_iter().map(String::from).collect());
    for args in steps {
        println!("$ civae {}", args.join(" "));
        run(&Cli::parse_from(std::iter::once("civae".to_string()).chain(args)))?;
    }
    Ok(())
}
