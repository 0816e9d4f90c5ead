//! Drives the command-line front end in-process: simulate, then report.

fn main() {
    let dir = std::env::temp_dir().join("tailrisk-example-cli");
    let out = dir.to_string_lossy().to_string();
    let code = tailrisk::cli::main_with_args(["tailrisk", "simulate", "--output", out.as_str(), "--seed", "3"]);
    println!("simulate exited with {code}");
    let code = tailrisk::cli::main_with_args(["tailrisk", "report", "--input", out.as_str(), "--output", out.as_str()]);
    println!("report exited with {code}");
}
