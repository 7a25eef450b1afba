fn main() {
    std::process::exit(warpbayes::cli::cli_main(std::env::args_os()));
}
