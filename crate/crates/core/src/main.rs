fn main() {
    std::process::exit(fedgame::cli::dispatch(std::env::args_os()));
}
