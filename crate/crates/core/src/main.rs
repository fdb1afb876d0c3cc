fn main() -> std::process::ExitCode {
    pronscore::cli::main()
}
