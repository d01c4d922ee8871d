fn main() {
    std::process::exit(impulse_game_cli::run_command(std::env::args_os()));
}
