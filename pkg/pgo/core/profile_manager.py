"""Named run profiles for repeatable optimize settings."""

from typing import Any, Dict, Optional

import yaml

from pgo.config import PROFILES_FILE

# Options a profile may carry; the names match `pgo optimize` parameters.
PROFILE_KEYS = ("init", "cost", "k", "gamma", "max_iters", "distance", "deterministic")


class ProfileManager:
    """Manages saved run profiles."""

    @staticmethod
    def load_profiles() -> Dict[str, Any]:
        """Load profiles from file; a missing or unreadable file is empty."""
        if not PROFILES_FILE.exists():
            return {}
        try:
            with open(PROFILES_FILE) as f:
                data = yaml.safe_load(f)
        except (OSError, yaml.YAMLError):
            return {}
        return data if isinstance(data, dict) else {}

    @staticmethod
    def _write(profiles: Dict[str, Any]):
        PROFILES_FILE.parent.mkdir(parents=True, exist_ok=True)
        with open(PROFILES_FILE, 'w') as f:
            yaml.safe_dump(profiles, f, sort_keys=True)

    @staticmethod
    def save_profile(name: str, options: Dict[str, Any]):
        """Save a profile, dropping unknown keys and unset values."""
        unknown = set(options) - set(PROFILE_KEYS)
        if unknown:
            raise ValueError(f"unknown profile options: {', '.join(sorted(unknown))}")
        profiles = ProfileManager.load_profiles()
        profiles[name] = {k: v for k, v in options.items() if v is not None}
        ProfileManager._write(profiles)

    @staticmethod
    def get_profile(name: str) -> Optional[Dict[str, Any]]:
        return ProfileManager.load_profiles().get(name)

    @staticmethod
    def delete_profile(name: str) -> bool:
        profiles = ProfileManager.load_profiles()
        if name not in profiles:
            return False
        del profiles[name]
        ProfileManager._write(profiles)
        return True

    @staticmethod
    def list_profiles() -> Dict[str, Any]:
        return ProfileManager.load_profiles()

    @staticmethod
    def merge(profile: Optional[Dict[str, Any]], overrides: Dict[str, Any]) -> Dict[str, Any]:
        """Profile values with every non-None override applied on top."""
        merged = dict(profile or {})
        merged.update({k: v for k, v in overrides.items() if v is not None})
        return merged
