fn main() {
    std::process::exit(dyndepth_cli::run(std::env::args_os()));
}
