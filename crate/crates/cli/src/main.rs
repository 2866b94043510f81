fn main() {
    std::process::exit(tvrefine_cli::cli_main(std::env::args_os()));
}
