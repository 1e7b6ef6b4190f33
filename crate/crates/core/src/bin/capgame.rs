fn main() {
    capgame::cli::init_logging();
    std::process::exit(capgame::cli::main_from(std::env::args_os()));
}
