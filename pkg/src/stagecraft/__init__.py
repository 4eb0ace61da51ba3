"""stagecraft: multi-turn, character-consistent image generation at desk scale.

The pipeline plans a scene per dialogue turn (an LLM-designed prompt book of
character prompts and layouts), repairs overlapping layouts, keeps one
frozen reference image per character, composes a mid-state canvas of
character cutouts, and runs a masked, guidance-substituted reverse
diffusion loop to produce the turn's image.  A benchmark builder and a
four-metric evaluation harness ride on the same deterministic backends.
"""

__version__ = "0.1.0"
