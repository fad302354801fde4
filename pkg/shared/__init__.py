"""Shared configuration, models and errors for the audio PEFT toolkit."""
