fn main() {
    std::process::exit(latent_style::cli::run(std::env::args_os()));
}
