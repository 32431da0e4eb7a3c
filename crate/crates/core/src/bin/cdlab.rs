fn main() -> std::process::ExitCode {
    cdlab::cli::main_with(std::env::args_os())
}
