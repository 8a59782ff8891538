fn main() -> std::process::ExitCode {
    ltrack_harness::cli::main()
}
