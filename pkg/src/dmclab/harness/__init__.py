"""Config-driven experiment front end."""
