fn main() {
    std::process::exit(exploit_target::cli::main(std::env::args_os()));
}
