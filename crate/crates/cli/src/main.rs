fn main() {
    std::process::exit(dichotomy_lab::cli_main(std::env::args_os()));
}
