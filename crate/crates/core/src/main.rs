fn main() -> std::process::ExitCode {
    ngeu::cli::main_exit()
}
