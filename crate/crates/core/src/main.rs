fn main() -> std::process::ExitCode {
    invsharp_core::cli::run_from(std::env::args_os())
}
