fn main() -> std::process::ExitCode {
    std::process::ExitCode::from(treegpt_cli::run(std::env::args_os()))
}
