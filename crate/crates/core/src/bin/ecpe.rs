fn main() -> std::process::ExitCode {
    ecpe::cli::main()
}
