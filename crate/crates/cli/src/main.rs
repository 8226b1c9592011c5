fn main() {
    std::process::exit(less_cli::cli_main(std::env::args_os()));
}
