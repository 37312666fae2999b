fn main() -> std::process::ExitCode {
    fracfield_cli::main_with_args(std::env::args_os())
}
