fn main() -> std::process::ExitCode {
    cobias::cli::main()
}
