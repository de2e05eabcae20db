fn main() -> std::process::ExitCode {
    augmenta::cli::main()
}
