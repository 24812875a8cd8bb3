fn main() {
    std::process::exit(binormal_lab::cli_main(std::env::args_os()));
}
