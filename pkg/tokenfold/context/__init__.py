from .app_container import AppContainer, build_container, load_run_config


__all__ = ["AppContainer", "build_container", "load_run_config"]
