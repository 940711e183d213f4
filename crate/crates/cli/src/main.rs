fn main() {
    std::process::exit(tipping::run(std::env::args_os()));
}
