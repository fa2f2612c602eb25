fn main() {
    std::process::exit(person_search_cli::run_command(std::env::args_os()));
}
