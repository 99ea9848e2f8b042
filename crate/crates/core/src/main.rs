fn main() {
    std::process::exit(hcng_bargain::cli::main_with_args(std::env::args_os()));
}
