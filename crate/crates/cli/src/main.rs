fn main() {
    std::process::exit(bicurnet_cli::run(std::env::args_os()));
}
