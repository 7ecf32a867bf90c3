fn main() -> std::process::ExitCode {
    nlctd_service::cli::main()
}
