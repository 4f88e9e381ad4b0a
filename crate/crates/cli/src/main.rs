fn main() -> std::process::ExitCode {
    splatrig_cli::cli::main_impl()
}
